//! `mstar` command-line driver.
//!
//! Exit status: 0 success, 2 usage or malformed config, 3 missing or
//! unreadable data, 4 non-finite value during training or scoring,
//! 5 model and data disagree (relation vocabulary or checkpoint layout).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mstar::evaluator::{
    distance_records, evaluate, per_distance_report, render_buckets, render_report,
};
use mstar::kg::{load_dataset, load_directory_graph, long_distance_proportion};
use mstar::numerics::NumericsError;
use mstar::trainer::{ablation_suite, fit_with, EpochRecord};
use mstar::{
    ConfigError, InductiveDataset, KgError, MStar, ModelConfig, MstarError, SelectionMode,
};
use thiserror::Error;

const CHECKPOINT: &str = "model.ckpt";
const CONFIG: &str = "config.txt";
const METRICS: &str = "metrics.json";
const REPORT: &str = "report.txt";
/// Hop threshold above which a query counts as long-distance.
const LONG_DISTANCE: u32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "mstar",
    version,
    about = "Inductive KG link prediction with multi-start progressive propagation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Relation, entity and fact counts of each graph directory.
    Stats {
        #[arg(long)]
        train_dir: PathBuf,
        #[arg(long)]
        test_dir: Option<PathBuf>,
    },
    /// Head-tail distance tables of the test queries and long-distance proportions.
    DistanceReport {
        #[command(flatten)]
        data: DataArgs,
        /// Keep the query's own edge when measuring distances.
        #[arg(long)]
        keep_query_edge: bool,
    },
    /// Train one model and write checkpoint, config and history to `--out`.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a trained run directory on the test split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Run directory written by `train`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the full model, each component ablation and the
    /// non-learned selection modes.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    train_dir: PathBuf,
    #[arg(long)]
    test_dir: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    out: PathBuf,
    /// `key = value` file applied on top of the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Starting-entity selection: learned, random or degree.
    #[arg(long)]
    mode: Option<SelectionMode>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
    #[error(transparent)]
    Model(#[from] MstarError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } => 2,
            Self::Io { .. } => 3,
            Self::Model(e) => match e {
                MstarError::Config(_) => 2,
                MstarError::NonFinite(_) | MstarError::Numerics(NumericsError::NonFinite(_)) => 4,
                MstarError::VocabularyMismatch { .. }
                | MstarError::Numerics(NumericsError::Checkpoint(_))
                | MstarError::Kg(KgError::UnknownRelation { .. }) => 5,
                MstarError::Kg(_)
                | MstarError::Io { .. }
                | MstarError::EmptyTrainingSet
                | MstarError::EmptyRecords => 3,
                MstarError::Numerics(_) => 4,
            },
        }
    }
}

impl From<KgError> for CliError {
    fn from(e: KgError) -> Self {
        Self::Model(e.into())
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_config(path: &Path) -> Result<ModelConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ModelConfig::parse(&text).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })
}

fn run_config(run: &RunArgs) -> Result<ModelConfig, CliError> {
    let mut cfg = match &run.config {
        Some(path) => read_config(path)?,
        None => ModelConfig::default(),
    };
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = run.mode {
        cfg.ablations.selection_mode = mode;
    }
    Ok(cfg)
}

fn dataset(data: &DataArgs) -> Result<InductiveDataset, CliError> {
    Ok(load_dataset(&data.train_dir, &data.test_dir)?)
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn stats(train_dir: &Path, test_dir: Option<&Path>) -> Result<String, CliError> {
    let mut out = String::from("graph\trelations\tentities\tfacts\n");
    for dir in std::iter::once(train_dir).chain(test_dir) {
        let s = load_directory_graph(dir)?.stats();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            dir_name(dir),
            s.relations,
            s.entities,
            s.facts
        );
    }
    Ok(out)
}

fn distance_report(ds: &InductiveDataset, exclude: bool) -> String {
    let records = distance_records(&ds.test_graph, &ds.test_queries, exclude);
    let rep = per_distance_report(&records);
    let mut out = format!(
        "queries\t{}\nquery_edge_excluded\t{exclude}\n",
        records.len()
    );
    out.push_str("\n# per distance\n");
    out.push_str(&render_buckets(&rep.fine));
    out.push_str("\n# coarse\n");
    out.push_str(&render_buckets(&rep.coarse));
    let _ = write!(
        out,
        "\n# longer than {LONG_DISTANCE} hops\ngraph\tproportion\n"
    );
    let train =
        long_distance_proportion(&ds.train_graph, &ds.train_queries, LONG_DISTANCE, exclude);
    let test = long_distance_proportion(&ds.test_graph, &ds.test_queries, LONG_DISTANCE, exclude);
    let _ = writeln!(out, "train\t{train:.2}\ntest\t{test:.2}");
    out
}

fn log_epoch(label: &str) -> impl FnMut(&EpochRecord) + '_ {
    move |r| {
        let _ = writeln!(
            std::io::stderr().lock(),
            "[{label}] epoch {} loss {:.6} valid_mrr {:.6} retained {}/{}",
            r.epoch,
            r.train_loss,
            r.valid_mrr,
            r.retained,
            r.queries
        );
    }
}

/// Fits one model and writes checkpoint, config and history into `dir`.
fn train_into(
    ds: &InductiveDataset,
    cfg: &ModelConfig,
    dir: &Path,
) -> Result<(MStar, f64), CliError> {
    create_dir(dir)?;
    let label = cfg.ablations.label();
    let (model, run) = fit_with(ds, cfg, log_epoch(&label))?;
    model.save(&dir.join(CHECKPOINT))?;
    write_file(&dir.join(CONFIG), &cfg.to_file_string())?;
    run.write_json(&dir.join(METRICS))?;
    Ok((model, run.best_valid_mrr))
}

fn test_report(model: &MStar, ds: &InductiveDataset) -> Result<(String, f64, f64), CliError> {
    let report = evaluate(
        model,
        &ds.test_graph,
        &ds.test_queries,
        &ds.test_extra_facts,
    )?;
    Ok((
        render_report(&report),
        report.metrics.mrr,
        report.metrics.hits,
    ))
}

fn load_run(dir: &Path, num_relations: usize) -> Result<MStar, CliError> {
    let cfg = read_config(&dir.join(CONFIG))?;
    let mut model = MStar::new(cfg, num_relations)?;
    model.load(&dir.join(CHECKPOINT))?;
    Ok(model)
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Stats {
            train_dir,
            test_dir,
        } => stats(&train_dir, test_dir.as_deref()),
        Command::DistanceReport {
            data,
            keep_query_edge,
        } => Ok(distance_report(&dataset(&data)?, !keep_query_edge)),
        Command::Train { data, run } => {
            let cfg = run_config(&run)?;
            let ds = dataset(&data)?;
            let (_, best) = train_into(&ds, &cfg, &run.out)?;
            Ok(format!(
                "run\t{}\nbest_valid_mrr\t{best:.6}\n",
                cfg.ablations.label()
            ))
        }
        Command::Eval { data, out } => {
            let ds = dataset(&data)?;
            let model = load_run(&out, ds.train_graph.num_relations())?;
            let (text, _, _) = test_report(&model, &ds)?;
            write_file(&out.join(REPORT), &text)?;
            Ok(text)
        }
        Command::Ablate { data, run } => {
            let base = run_config(&run)?;
            let ds = dataset(&data)?;
            let mut table = String::from("run\tvalid_mrr\ttest_mrr\ttest_hits@10\n");
            for ablations in ablation_suite() {
                let cfg = ModelConfig {
                    ablations,
                    ..base.clone()
                };
                let label = ablations.label();
                let dir = run.out.join(&label);
                let (model, valid) = train_into(&ds, &cfg, &dir)?;
                let (text, mrr, hits) = test_report(&model, &ds)?;
                write_file(&dir.join(REPORT), &text)?;
                let _ = writeln!(table, "{label}\t{valid:.6}\t{mrr:.6}\t{hits:.6}");
            }
            write_file(&run.out.join("ablation.tsv"), &table)?;
            Ok(table)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
