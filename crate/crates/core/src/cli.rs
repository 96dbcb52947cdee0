//! Command-line front end: `grouprec {gen|irr|train|eval|compare|export-emb}`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{generate, write_generated, GenSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_set, EvalSet, MetricReport, DEFAULT_CUTOFFS, METRICS_CSV_HEADER, NUM_EVAL_NEGATIVES};
use crate::graph::{load_dataset, DatasetPaths, InteractionGraph};
use crate::irr::dataset_irr;
use crate::model::{forward, write_embeddings, ModelParams, SavedParams, Variant};
use crate::numerics::RngStream;
use crate::training::{
    fit_with, loss_csv, split_leave_one, Split, TrainConfig, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE,
    DEFAULT_NEG_RATIO, DEFAULT_SPLIT_RATIO,
};

pub const MODEL_FORMAT: &str = "grouprec-model/1";

#[derive(Debug, Parser)]
#[command(name = "grouprec", version, about = "Group recommendation with an IRR-weighted graph network")]
pub struct Cli {
    /// Worker threads for evaluation and independent runs (1 = reference mode).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key = value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Print the dataset's interactive repetition rate.
    Irr(DataArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Evaluate a saved model on its held-out split.
    Eval(EvalArgs),
    /// Train every variant on shared splits and tabulate HR/NDCG.
    Compare(CompareArgs),
    /// Write the fused embeddings of a saved model.
    ExportEmb(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub num_users: usize,
    #[arg(long, default_value_t = 800)]
    pub num_items: usize,
    #[arg(long, default_value_t = 150)]
    pub num_groups: usize,
    #[arg(long, default_value_t = 2)]
    pub group_size_min: usize,
    #[arg(long, default_value_t = 8)]
    pub group_size_max: usize,
    #[arg(long, default_value_t = 5)]
    pub items_per_user_min: usize,
    #[arg(long, default_value_t = 20)]
    pub items_per_user_max: usize,
    #[arg(long, default_value_t = 3)]
    pub items_per_group_min: usize,
    #[arg(long, default_value_t = 8)]
    pub items_per_group_max: usize,
}

impl GenArgs {
    pub fn spec(&self) -> GenSpec {
        GenSpec {
            num_users: self.num_users,
            num_items: self.num_items,
            num_groups: self.num_groups,
            group_size: (self.group_size_min, self.group_size_max),
            items_per_user: (self.items_per_user_min, self.items_per_user_max),
            items_per_group: (self.items_per_group_min, self.items_per_group_max),
            rho: self.rho,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding user_item.txt, group_item.txt and membership.txt.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub user_item: Option<PathBuf>,
    #[arg(long)]
    pub group_item: Option<PathBuf>,
    #[arg(long)]
    pub membership: Option<PathBuf>,
}

impl DataArgs {
    fn given(&self) -> bool {
        self.data.is_some() || self.user_item.is_some() || self.group_item.is_some() || self.membership.is_some()
    }

    /// Explicit file flags override the files found under `--data`.
    pub fn paths(&self) -> Result<DatasetPaths> {
        let base = self.data.as_ref().map(DatasetPaths::in_dir);
        let pick = |explicit: &Option<PathBuf>, from_dir: Option<&PathBuf>, name: &str| {
            explicit
                .clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| Error::usage(format!("missing --{name} (or --data DIR)")))
        };
        Ok(DatasetPaths {
            user_item: pick(&self.user_item, base.as_ref().map(|b| &b.user_item), "user-item")?,
            group_item: pick(&self.group_item, base.as_ref().map(|b| &b.group_item), "group-item")?,
            membership: pick(&self.membership, base.as_ref().map(|b| &b.membership), "membership")?,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = crate::model::DEFAULT_EMBEDDING_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = DEFAULT_NEG_RATIO)]
    pub neg_ratio: usize,
    #[arg(long, default_value_t = crate::model::DEFAULT_INIT_STD)]
    pub init_std: f64,
    /// Triplets per optimizer step; full batch when absent.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Fusion weight to use instead of the measured training IRR.
    #[arg(long)]
    pub irr_override: Option<f64>,
    /// First seed; repeats use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Target train:test ratio of group-item interactions.
    #[arg(long, default_value_t = DEFAULT_SPLIT_RATIO)]
    pub split_ratio: f64,
    /// Evaluate on the held-out split every this many epochs (0 = never).
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
}

impl HyperArgs {
    fn config(&self, variant: Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            embedding_dim: self.dim,
            learning_rate: self.lr,
            neg_ratio: self.neg_ratio,
            epochs: self.epochs,
            seed,
            variant,
            irr_override: self.irr_override,
            init_std: self.init_std,
            batch_size: self.batch_size,
        }
    }

    fn seeds(&self) -> Result<Vec<u64>> {
        if self.repeats == 0 {
            return Err(Error::usage("--repeats must be at least 1"));
        }
        Ok((0..self.repeats as u64).map(|i| self.seed + i).collect())
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = Variant::IrrFusion)]
    pub variant: Variant,
    /// Output directory for models, loss traces and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset to evaluate on; defaults to the one recorded in the model.
    #[command(flatten)]
    pub data: DataArgs,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, value_delimiter = ',', default_values_t = Variant::ALL.to_vec())]
    pub variants: Vec<Variant>,
    /// Report the best evaluated epoch per run instead of the last one.
    #[arg(long)]
    pub best_epoch: bool,
    /// Per-run CSV destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to rebuild a trained model and its evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub dataset: DatasetPaths,
    pub dataset_sha256: String,
    pub split_ratio: f64,
    pub irr: f64,
    pub config: TrainConfig,
    pub params: SavedParams,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::ModelFormat(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::ModelFormat(format!("{}: {e}", path.display())))?;
        if m.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unsupported format {:?}", m.format)));
        }
        Ok(m)
    }
}

/// SHA-256 over the three dataset files, in a fixed order.
pub fn dataset_fingerprint(paths: &DatasetPaths) -> Result<String> {
    let mut h = Sha256::new();
    for p in [&paths.user_item, &paths.group_item, &paths.membership] {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// The split and evaluation candidates belonging to `seed`.
pub fn prepare_split(graph: &InteractionGraph, seed: u64, ratio: f64) -> Result<(Split, EvalSet)> {
    let root = RngStream::new(seed);
    let split = split_leave_one(graph, ratio, &mut root.fork("split"))?;
    let set = EvalSet::sample(&split, NUM_EVAL_NEGATIVES, &mut root.fork("eval"))?;
    Ok((split, set))
}

/// Result of one training run with periodic held-out evaluation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub params: ModelParams,
    pub losses: Vec<f64>,
    pub irr: f64,
    pub history: Vec<(usize, MetricReport)>,
    pub last: MetricReport,
}

impl RunOutcome {
    /// The evaluated epoch with the highest HR@10, earliest on ties.
    pub fn best(&self) -> &MetricReport {
        let key = |m: &MetricReport| m.hr.get(&10).copied().unwrap_or(0.0);
        self.history
            .iter()
            .map(|(_, m)| m)
            .chain(std::iter::once(&self.last))
            .fold(None::<&MetricReport>, |best, m| match best {
                Some(b) if key(b) >= key(m) => Some(b),
                _ => Some(m),
            })
            .unwrap()
    }
}

pub fn run_once(split: &Split, set: &EvalSet, config: &TrainConfig, eval_every: usize) -> Result<RunOutcome> {
    let irr = config.resolve_irr(split)?;
    let mut history = Vec::new();
    let fit = fit_with(split, config, |epoch, params, _| {
        if eval_every > 0 && epoch % eval_every == 0 {
            let out = forward(&split.train_graph, params, irr)?;
            history.push((epoch, evaluate_set(&out, set, &DEFAULT_CUTOFFS)?));
        }
        Ok(())
    })?;
    let last = evaluate_set(&forward(&split.train_graph, &fit.params, irr)?, set, &DEFAULT_CUTOFFS)?;
    Ok(RunOutcome {
        params: fit.params,
        losses: fit.losses,
        irr,
        history,
        last,
    })
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Applies `key = value` lines from `--config` as flags the user did not
/// pass. Keys use underscores or dashes; unknown keys are ignored.
fn apply_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if a == "--config" {
            config = args.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else if a == "--threads" {
            i += 1;
        } else if sub.is_none() && !a.starts_with('-') {
            sub = Some(a.clone());
        }
        i += 1;
    }
    let (Some(config), Some(sub)) = (config, sub) else {
        return Ok(args);
    };
    let cmd = Cli::command();
    let Some(sub_cmd) = cmd.find_subcommand(&sub) else {
        return Ok(args);
    };
    let path = PathBuf::from(&config);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: n + 1,
            msg: "expected `key = value`".into(),
        })?;
        let long = key.trim().replace('_', "-");
        let value = value.trim();
        let Some(arg) = sub_cmd.get_arguments().find(|a| a.get_long() == Some(long.as_str())) else {
            continue;
        };
        let flag = format!("--{long}");
        let given = args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(flag);
            extra.push(value.to_string());
        } else if value == "true" {
            extra.push(flag);
        }
    }
    let mut args = args;
    args.extend(extra);
    Ok(args)
}

/// Parses `args` (program name first) and runs the command, writing data to
/// `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let args = apply_config(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => return emit(out, &e.render().to_string()),
        Err(e) => return Err(Error::Cli(e.render().to_string())),
    };
    let mut buf = Vec::new();
    match cli.threads {
        Some(0) => return Err(Error::usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::usage(e.to_string()))?
            .install(|| dispatch(cli.command, &mut buf))?,
        None => dispatch(cli.command, &mut buf)?,
    }
    emit(out, &String::from_utf8_lossy(&buf))
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Irr(a) => cmd_irr(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Compare(a) => cmd_compare(&a, out),
        Command::ExportEmb(a) => cmd_export(&a, out),
    }
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let spec = a.spec();
    let graph = generate(&spec)?;
    write_generated(&graph, &spec, &a.out)?;
    let irr = dataset_irr(&graph)?;
    emit(
        out,
        &format!(
            "users={} groups={} items={} irr={:.4}\n",
            graph.num_users(),
            graph.num_groups(),
            graph.num_items(),
            irr.value
        ),
    )
}

fn cmd_irr(a: &DataArgs, out: &mut dyn Write) -> Result<()> {
    let graph = load_dataset(&a.paths()?)?;
    let irr = dataset_irr(&graph)?;
    emit(out, &format!("irr={:.4} groups={}\n", irr.value, irr.groups_counted))
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let paths = a.data.paths()?;
    let graph = load_dataset(&paths)?;
    let fingerprint = dataset_fingerprint(&paths)?;
    let seeds = a.hyper.seeds()?;
    for s in &seeds {
        a.hyper.config(a.variant, *s).validate()?;
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let outcomes = seeds
        .par_iter()
        .map(|&seed| {
            let (split, set) = prepare_split(&graph, seed, a.hyper.split_ratio)?;
            let config = a.hyper.config(a.variant, seed);
            run_once(&split, &set, &config, a.hyper.eval_every).map(|r| (config, r))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = String::new();
    writeln!(manifest, "dataset.user_item = {}", paths.user_item.display()).unwrap();
    writeln!(manifest, "dataset.group_item = {}", paths.group_item.display()).unwrap();
    writeln!(manifest, "dataset.membership = {}", paths.membership.display()).unwrap();
    writeln!(manifest, "dataset.sha256 = {fingerprint}").unwrap();
    writeln!(manifest, "dataset.irr = {}", dataset_irr(&graph)?.value).unwrap();
    writeln!(manifest, "variant = {}", a.variant).unwrap();
    writeln!(manifest, "epochs = {}", a.hyper.epochs).unwrap();
    writeln!(manifest, "lr = {}", a.hyper.lr).unwrap();
    writeln!(manifest, "dim = {}", a.hyper.dim).unwrap();
    writeln!(manifest, "neg_ratio = {}", a.hyper.neg_ratio).unwrap();
    writeln!(manifest, "init_std = {}", a.hyper.init_std).unwrap();
    match a.hyper.batch_size {
        Some(b) => writeln!(manifest, "batch_size = {b}").unwrap(),
        None => writeln!(manifest, "batch_size = full").unwrap(),
    }
    match a.hyper.irr_override {
        Some(v) => writeln!(manifest, "irr_override = {v}").unwrap(),
        None => writeln!(manifest, "irr_override = none").unwrap(),
    }
    writeln!(manifest, "split_ratio = {}", a.hyper.split_ratio).unwrap();
    writeln!(manifest, "eval_every = {}", a.hyper.eval_every).unwrap();
    let seed_list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    writeln!(manifest, "seeds = {}", seed_list.join(",")).unwrap();

    let mut history_csv = format!("epoch,{METRICS_CSV_HEADER}\n");
    for (config, run) in &outcomes {
        let seed = config.seed;
        let model_path = a.out.join(format!("model_seed{seed}.json"));
        let loss_path = a.out.join(format!("loss_seed{seed}.csv"));
        ModelFile {
            format: MODEL_FORMAT.into(),
            dataset: paths.clone(),
            dataset_sha256: fingerprint.clone(),
            split_ratio: a.hyper.split_ratio,
            irr: run.irr,
            config: config.clone(),
            params: run.params.to_saved(),
        }
        .save(&model_path)?;
        write_file(&loss_path, &loss_csv(&run.losses, run.irr, a.variant, seed))?;
        for (epoch, m) in &run.history {
            for row in m.csv_rows(a.variant, seed).lines() {
                writeln!(history_csv, "{epoch},{row}").unwrap();
            }
        }
        writeln!(manifest, "seed.{seed}.irr = {}", run.irr).unwrap();
        writeln!(manifest, "seed.{seed}.model = {}", model_path.display()).unwrap();
        writeln!(manifest, "seed.{seed}.loss = {}", loss_path.display()).unwrap();
    }
    let history_path = a.out.join("history.csv");
    write_file(&history_path, &history_csv)?;
    writeln!(manifest, "history = {}", history_path.display()).unwrap();
    write_file(&a.out.join("manifest.txt"), &manifest)?;

    let mut summary = String::new();
    for n in DEFAULT_CUTOFFS {
        let hr: Vec<f64> = outcomes.iter().map(|(_, r)| r.best().hr[&n]).collect();
        let nd: Vec<f64> = outcomes.iter().map(|(_, r)| r.best().ndcg[&n]).collect();
        let (hm, hs) = mean_std(&hr);
        let (nm, ns) = mean_std(&nd);
        writeln!(
            summary,
            "{} runs={} best-epoch mean±std: HR@{n}={hm:.4}±{hs:.4} NDCG@{n}={nm:.4}±{ns:.4}",
            a.variant,
            outcomes.len()
        )
        .unwrap();
    }
    emit(out, &summary)
}

/// Loads the model and rebuilds its dataset, split and evaluation set.
fn restore(model: &Path, data: &DataArgs) -> Result<(ModelFile, InteractionGraph, Split, EvalSet)> {
    let m = ModelFile::load(model)?;
    let paths = if data.given() { data.paths()? } else { m.dataset.clone() };
    if dataset_fingerprint(&paths)? != m.dataset_sha256 {
        return Err(Error::ModelFormat(
            "dataset files differ from the ones the model was trained on".into(),
        ));
    }
    let graph = load_dataset(&paths)?;
    let (split, set) = prepare_split(&graph, m.config.seed, m.split_ratio)?;
    Ok((m, graph, split, set))
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (m, _, split, set) = restore(&a.model, &a.data)?;
    let params = ModelParams::from_saved(&m.params)?;
    params.check_graph(&split.train_graph)?;
    let report = evaluate_set(&forward(&split.train_graph, &params, m.irr)?, &set, &DEFAULT_CUTOFFS)?;
    let csv = format!("{METRICS_CSV_HEADER}\n{}", report.csv_rows(m.config.variant, m.config.seed));
    match &a.out {
        Some(p) => write_file(p, &csv),
        None => emit(out, &csv),
    }
}

fn cmd_export(a: &ExportArgs, out: &mut dyn Write) -> Result<()> {
    let (m, graph, split, _) = restore(&a.model, &a.data)?;
    let params = ModelParams::from_saved(&m.params)?;
    params.check_graph(&split.train_graph)?;
    let outputs = forward(&split.train_graph, &params, m.irr)?;
    write_embeddings(&outputs.e3, &a.out)?;
    let s = graph.stats();
    emit(
        out,
        &format!(
            "wrote {} vectors of dimension {} to {}\n",
            s.num_users + s.num_groups + s.num_items,
            params.dim(),
            a.out.display()
        ),
    )
}

fn cmd_compare(a: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    if a.variants.is_empty() {
        return Err(Error::usage("--variants must name at least one variant"));
    }
    let graph = load_dataset(&a.data.paths()?)?;
    let seeds = a.hyper.seeds()?;
    for v in &a.variants {
        a.hyper.config(*v, seeds[0]).validate()?;
    }
    let prepared = seeds
        .par_iter()
        .map(|&s| prepare_split(&graph, s, a.hyper.split_ratio))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, Variant)> = (0..seeds.len())
        .flat_map(|i| a.variants.iter().map(move |&v| (i, v)))
        .collect();
    let eval_every = if a.best_epoch { a.hyper.eval_every.max(1) } else { 0 };
    let reports = jobs
        .par_iter()
        .map(|&(i, v)| {
            let (split, set) = &prepared[i];
            let r = run_once(split, set, &a.hyper.config(v, seeds[i]), eval_every)?;
            Ok(if a.best_epoch { r.best().clone() } else { r.last })
        })
        .collect::<Result<Vec<_>>>()?;

    if let Some(path) = &a.out {
        let mut csv = format!("{METRICS_CSV_HEADER}\n");
        for (&(i, v), r) in jobs.iter().zip(&reports) {
            csv += &r.csv_rows(v, seeds[i]);
        }
        write_file(path, &csv)?;
    }

    let selection = if a.best_epoch { "best epoch" } else { "final epoch" };
    let mut table = format!(
        "# {} seeds, {selection}, mean±std\nvariant       HR@5            NDCG@5          HR@10           NDCG@10\n",
        seeds.len()
    );
    let mut by_variant: BTreeMap<usize, Vec<&MetricReport>> = BTreeMap::new();
    for (&(_, v), r) in jobs.iter().zip(&reports) {
        let pos = a.variants.iter().position(|x| *x == v).unwrap();
        by_variant.entry(pos).or_default().push(r);
    }
    for (pos, rs) in by_variant {
        write!(table, "{:<13}", a.variants[pos].as_str()).unwrap();
        for n in DEFAULT_CUTOFFS {
            for metric in [0, 1] {
                let xs: Vec<f64> = rs
                    .iter()
                    .map(|r| if metric == 0 { r.hr[&n] } else { r.ndcg[&n] })
                    .collect();
                let (m, s) = mean_std(&xs);
                write!(table, " {:<15}", format!("{m:.4}±{s:.4}")).unwrap();
            }
        }
        table.push('\n');
    }
    emit(out, &table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn config_fills_missing_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        fs::write(&cfg, "# defaults\nrho = 0.25\nseed=9\nnum_groups = 7\nbogus = 1\n").unwrap();
        let args: Vec<String> = ["grouprec", "gen", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", "x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let cli = Cli::try_parse_from(apply_config(args).unwrap()).unwrap();
        let Command::Gen(g) = cli.command else { panic!() };
        assert_eq!((g.rho, g.seed, g.num_groups), (0.25, 3, 7));
    }

    #[test]
    fn malformed_config_line() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        fs::write(&cfg, "rho 0.25\n").unwrap();
        let args = ["grouprec", "gen", "--out", "x", "--config", cfg.to_str().unwrap()];
        let r = run(args, &mut Vec::new());
        assert!(matches!(r, Err(Error::Parse { line: 1, .. })), "{r:?}");
    }

    #[test]
    fn data_paths_resolution() {
        let d = DataArgs {
            data: Some("ds".into()),
            user_item: None,
            group_item: Some("other/gi.txt".into()),
            membership: None,
        };
        let p = d.paths().unwrap();
        assert_eq!(p.user_item, Path::new("ds/user_item.txt"));
        assert_eq!(p.group_item, Path::new("other/gi.txt"));
        let none = DataArgs {
            data: None,
            user_item: None,
            group_item: None,
            membership: None,
        };
        assert!(none.paths().is_err());
    }

    #[test]
    fn best_prefers_highest_hr10_then_earliest() {
        let rep = |hr10: f64| MetricReport {
            hr: [(5, 0.0), (10, hr10)].into_iter().collect(),
            ndcg: [(5, 0.0), (10, 0.0)].into_iter().collect(),
            num_cases: 1,
        };
        let g = crate::graph::fixtures::f3();
        let params = ModelParams::init(&g, 2, Variant::OneLayer, 0.1, &mut RngStream::new(0)).unwrap();
        let run = RunOutcome {
            params,
            losses: vec![],
            irr: 0.5,
            history: vec![(1, rep(0.2)), (2, rep(0.4)), (3, rep(0.4))],
            last: rep(0.3),
        };
        assert_eq!(run.best(), &run.history[1].1);
    }
}
