//! Command-line surface: `ingest`, `train`, `retrieve` and `eval`.
//!
//! Every flag is turned into a `dotted.key=value` override on top of the
//! config file, so the resolved configuration is the single source of truth
//! and gets echoed into the run directory as `config.resolved`.
//!
//! Run directory layout:
//!
//! ```text
//! <run_dir>/config.resolved
//! <run_dir>/store/          exemplars.jsonl, embeddings.bin, meta.json
//! <run_dir>/checkpoints/    iter-NNNNNN.ckpt
//! <run_dir>/metrics.csv
//! <run_dir>/report.json
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::environment::{render_exemplars, LmEnvironment};
use crate::error::{Error, Result};
use crate::evaluation::report::mean_of_runs;
use crate::evaluation::{EvalReport, RetrieverReport};
use crate::exemplar_store::{read_jsonl, Exemplar, ExemplarStore, IngestOptions, Record};
use crate::model::RetrieverModel;
use crate::pipeline::{evaluate, leave_one_out_queries, queries_from_records, EvalSettings, Retriever};
use crate::trainer::{derive_rng, MetricsRow, Trainer, TrainerState};

const STREAM_RETRIEVE: u64 = 200;

#[derive(Debug, Parser)]
#[command(name = "iterative-retriever", version, about = "Iterative exemplar retrieval trained with PPO")]
pub struct Cli {
    /// TOML config file with dotted keys.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    /// Config override, e.g. `--set policy.beta_renorm=5.0`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvArg {
    Synthetic,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Sampled,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed a JSONL dataset of {"input", "output"} records into the run's store.
    Ingest {
        /// Defaults to `data.exemplars`.
        dataset: Option<PathBuf>,
    },
    /// Train the retriever with PPO, writing checkpoints and metrics.csv.
    Train {
        #[arg(long, value_enum)]
        env: Option<EnvArg>,
        #[arg(long)]
        episodes: Option<u64>,
        /// Continue from a training checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Retrieve an exemplar sequence for one query and print it as JSON.
    Retrieve {
        /// Defaults to the newest checkpoint in the run directory.
        #[arg(long, value_name = "CKPT")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        query: String,
        /// Sequence length; defaults to `ppo.K`.
        #[arg(short = 'k', long = "k")]
        k: Option<usize>,
        #[arg(long, value_enum, default_value = "greedy")]
        mode: ModeArg,
    },
    /// Evaluate the iterative retriever and the baselines on a test set.
    Eval {
        #[arg(long, value_name = "CKPT")]
        checkpoint: Option<PathBuf>,
        /// Defaults to `data.test`.
        #[arg(long, value_name = "PATH")]
        test: Option<PathBuf>,
        #[arg(long, value_enum)]
        env: Option<EnvArg>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Where to write the report; defaults to `<run_dir>/report.json`.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
}

impl Cli {
    /// Loads the config file and applies the flags as overrides.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(dir) = &self.run_dir {
            overrides.push(format!("run_dir={}", toml_string(&dir.to_string_lossy())));
        }
        let env_name = |e: &EnvArg| match e {
            EnvArg::Synthetic => "\"synthetic\"",
            EnvArg::Remote => "\"remote\"",
        };
        match &self.command {
            Command::Train { env, episodes, .. } => {
                if let Some(e) = env {
                    overrides.push(format!("env.kind={}", env_name(e)));
                }
                if let Some(n) = episodes {
                    overrides.push(format!("train.episodes={n}"));
                }
            }
            Command::Eval { env, repeats, .. } => {
                if let Some(e) = env {
                    overrides.push(format!("env.kind={}", env_name(e)));
                }
                if let Some(n) = repeats {
                    overrides.push(format!("eval.repeats={n}"));
                }
            }
            _ => {}
        }
        overrides.extend(self.overrides.iter().cloned());
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    let mut stdout = std::io::stdout().lock();
    match run(&cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Runs a parsed command, writing its normal output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let config = cli.resolve_config()?;
    match &cli.command {
        Command::Ingest { dataset } => cmd_ingest(&config, dataset.as_deref(), out),
        Command::Train { resume, .. } => cmd_train(&config, resume.as_deref(), out),
        Command::Retrieve {
            checkpoint,
            query,
            k,
            mode,
        } => cmd_retrieve(&config, checkpoint.as_deref(), query, *k, *mode, out),
        Command::Eval {
            checkpoint,
            test,
            output,
            ..
        } => cmd_eval(&config, checkpoint.as_deref(), test.as_deref(), output.as_deref(), out),
    }
}

fn store_dir(config: &RunConfig) -> PathBuf {
    config.run_dir.join("store")
}

fn checkpoint_dir(config: &RunConfig) -> PathBuf {
    config.run_dir.join("checkpoints")
}

pub fn checkpoint_path(config: &RunConfig, iteration: u64) -> PathBuf {
    checkpoint_dir(config).join(format!("iter-{iteration:06}.ckpt"))
}

fn write_resolved(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.run_dir).map_err(|e| Error::io(format!("creating {}", config.run_dir.display()), e))?;
    let path = config.run_dir.join("config.resolved");
    fs::write(&path, config.to_toml()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("writing output", e)
}

fn load_store(config: &RunConfig) -> Result<ExemplarStore> {
    let dir = store_dir(config);
    if !dir.join("meta.json").exists() {
        return Err(Error::Config(format!(
            "no exemplar store at {}; run `ingest` first",
            dir.display()
        )));
    }
    let store = ExemplarStore::load(&dir)?;
    if store.dim() != config.encoder.dim {
        return Err(Error::Config(format!(
            "store has dimension {} but encoder.dim is {}",
            store.dim(),
            config.encoder.dim
        )));
    }
    Ok(store)
}

/// The newest checkpoint in the run directory.
pub fn latest_checkpoint(config: &RunConfig) -> Result<PathBuf> {
    let dir = checkpoint_dir(config);
    let mut found: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    found.sort();
    found
        .pop()
        .ok_or_else(|| Error::Config(format!("no checkpoints in {}", dir.display())))
}

fn load_model(config: &RunConfig, checkpoint: Option<&Path>, store: &ExemplarStore) -> Result<RetrieverModel> {
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => latest_checkpoint(config)?,
    };
    let model = Checkpoint::load(&path)?.model;
    if model.dim() != store.dim() {
        return Err(Error::Config(format!(
            "checkpoint has dimension {} but the store has {}",
            model.dim(),
            store.dim()
        )));
    }
    Ok(model)
}

pub fn cmd_ingest(config: &RunConfig, dataset: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let path = dataset
        .or(config.data.exemplars.as_deref())
        .ok_or_else(|| Error::Config("no dataset given and data.exemplars is unset".into()))?;
    let records = read_jsonl(path)?;
    let encoder = config.encoder.build()?;
    let store = ExemplarStore::ingest(
        records,
        encoder.as_ref(),
        IngestOptions {
            embed_pair: config.encoder.embed_pair,
        },
    )?;
    store.save(&store_dir(config))?;
    write_resolved(config)?;
    writeln!(out, "ingested {} exemplars, dim {}", store.len(), store.dim()).map_err(io_out)
}

/// Gold pairs for the synthetic environment.
fn gold_pairs<'a>(store: &'a ExemplarStore, extra: &'a [Record]) -> impl Iterator<Item = (&'a str, &'a str)> {
    store
        .exemplars()
        .iter()
        .map(|e| (e.input_text.as_str(), e.output_text.as_str()))
        .chain(extra.iter().map(|r| (r.input.as_str(), r.output.as_str())))
}

pub fn cmd_train(config: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let store = load_store(config)?;
    let extra = match &config.data.train_queries {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let queries = if extra.is_empty() {
        leave_one_out_queries(&store)
    } else {
        queries_from_records(&extra, config.encoder.build()?.as_ref())?
    };
    let env = config.env.build(gold_pairs(&store, &extra))?;
    let trainer_config = config.trainer_config();
    let header = serde_json::to_value(config)?;

    let state = match resume {
        Some(path) => Checkpoint::load(path)?.into_state()?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let model = RetrieverModel::new(store.dim(), config.policy.beta, config.policy.init, &mut rng)?;
            TrainerState::new(model, &trainer_config)
        }
    };
    if state.model.dim() != store.dim() {
        return Err(Error::Config(format!(
            "checkpoint has dimension {} but the store has {}",
            state.model.dim(),
            store.dim()
        )));
    }
    write_resolved(config)?;
    let metrics_path = config.run_dir.join("metrics.csv");
    let mut metrics = open_metrics(&metrics_path, resume.map(|_| state.iteration))?;

    let every = config.train.checkpoint_every;
    let mut trainer = Trainer::new(trainer_config, &store, env.as_ref(), &queries, state)?;
    let mut last_saved = None;
    let save = |trainer: &mut Trainer<'_>| -> Result<PathBuf> {
        trainer.state_mut().round_for_checkpoint();
        let path = checkpoint_path(config, trainer.state().iteration);
        Checkpoint::from_state(trainer.state(), header.clone()).save(&path)?;
        Ok(path)
    };
    trainer.run(|trainer, row| {
        writeln!(metrics, "{}", row.to_csv()).map_err(|e| Error::io("writing metrics.csv", e))?;
        metrics.flush().map_err(|e| Error::io("writing metrics.csv", e))?;
        log::info!(
            "iteration {} episodes {} mean_return {:.4} entropy {:.3}",
            row.iteration,
            row.episodes,
            row.mean_return,
            row.mean_entropy
        );
        if row.iteration % every == 0 {
            last_saved = Some((row.iteration, save(trainer)?));
        }
        Ok(())
    })?;
    let final_iteration = trainer.state().iteration;
    let final_path = match last_saved {
        Some((it, path)) if it == final_iteration => path,
        _ => save(&mut trainer)?,
    };
    let state = trainer.state();
    writeln!(
        out,
        "trained {} episodes over {} iterations ({} failed); checkpoint {}",
        state.episodes_done,
        state.iteration,
        state.failed_episodes,
        final_path.display()
    )
    .map_err(io_out)
}

/// Opens metrics.csv for appending. On resume, rows after `keep_through` are
/// dropped so the log continues from the checkpoint.
fn open_metrics(path: &Path, keep_through: Option<u64>) -> Result<fs::File> {
    let mut text = format!("{}\n", MetricsRow::HEADER);
    if let (Some(limit), Ok(existing)) = (keep_through, fs::read_to_string(path)) {
        for line in existing.lines().skip(1) {
            let iteration = line.split(',').next().and_then(|f| f.parse::<u64>().ok());
            if iteration.is_some_and(|i| i <= limit) {
                text.push_str(line);
                text.push('\n');
            }
        }
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))
}

#[derive(Debug, Serialize)]
struct RetrievedItem<'a> {
    rank: usize,
    id: usize,
    score: f64,
    input: &'a str,
    output: &'a str,
}

#[derive(Debug, Serialize)]
struct RetrieveOutput<'a> {
    query: &'a str,
    mode: &'a str,
    k: usize,
    exemplars: Vec<RetrievedItem<'a>>,
    prompt: String,
}

pub fn cmd_retrieve(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    query: &str,
    k: Option<usize>,
    mode: ModeArg,
    out: &mut dyn Write,
) -> Result<()> {
    let store = load_store(config)?;
    let k = k.unwrap_or(config.ppo.k);
    if k == 0 || k > store.len() {
        return Err(Error::InvalidArgument(format!(
            "K = {k} must lie in 1..={} (the store size)",
            store.len()
        )));
    }
    let model = load_model(config, checkpoint, &store)?;
    let embedding = Array1::from(config.encoder.build()?.embed(query)?);
    let retriever = match mode {
        ModeArg::Greedy => Retriever::Iterative(&model),
        ModeArg::Sampled => Retriever::IterativeSampled(&model, config.policy.sampling()),
    };
    let mut rng = derive_rng(config.seed, STREAM_RETRIEVE, 0);
    let ids = retriever.retrieve(&store, query, &embedding, k, &HashSet::new(), &mut rng)?;
    let chosen: Vec<&Exemplar> = ids.iter().map(|(id, _)| &store.exemplars()[*id]).collect();
    let output = RetrieveOutput {
        query,
        mode: match mode {
            ModeArg::Greedy => "greedy",
            ModeArg::Sampled => "sampled",
        },
        k,
        exemplars: ids
            .iter()
            .zip(&chosen)
            .enumerate()
            .map(|(rank, ((id, score), e))| RetrievedItem {
                rank: rank + 1,
                id: *id,
                score: *score,
                input: &e.input_text,
                output: &e.output_text,
            })
            .collect(),
        prompt: render_exemplars(chosen.iter().copied(), query).text,
    };
    serde_json::to_writer_pretty(&mut *out, &output)?;
    writeln!(out).map_err(io_out)
}

pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    test: Option<&Path>,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let store = load_store(config)?;
    let test_path = test
        .or(config.data.test.as_deref())
        .ok_or_else(|| Error::Config("no test set given and data.test is unset".into()))?;
    let records = read_jsonl(test_path)?;
    if records.is_empty() {
        return Err(Error::Config(format!("test set {} is empty", test_path.display())));
    }
    let needs_model = config
        .eval
        .retrievers
        .contains(&crate::config::RetrieverKind::Iterative);
    let model = if needs_model {
        Some(load_model(config, checkpoint, &store)?)
    } else {
        None
    };
    let queries = queries_from_records(&records, config.encoder.build()?.as_ref())?;
    let env: Box<dyn LmEnvironment> = config.env.build(gold_pairs(&store, &records))?;
    let settings = EvalSettings {
        exemplars: config.ppo.k,
        max_k: config.eval.max_k,
        beams: config.env.beams,
        smatch_restarts: config.eval.smatch_restarts,
        smatch_average: config.eval.smatch_average,
        seed: config.seed,
    };
    write_resolved(config)?;

    let mut report = EvalReport {
        max_k: settings.max_k,
        repeats: config.eval.repeats,
        exemplars_per_prompt: settings.exemplars,
        smatch_average: settings.smatch_average,
        retrievers: Default::default(),
    };
    for kind in &config.eval.retrievers {
        let retriever = match kind {
            crate::config::RetrieverKind::Iterative => Retriever::Iterative(model.as_ref().expect("model loaded")),
            crate::config::RetrieverKind::MipsTopK => Retriever::MipsTopK,
            crate::config::RetrieverKind::Bm25 => Retriever::Bm25,
        };
        let runs = (0..config.eval.repeats as u64)
            .map(|run| evaluate(&retriever, &store, env.as_ref(), &queries, &settings, run))
            .collect::<Result<Vec<_>>>()?;
        let mean = mean_of_runs(&runs);
        report
            .retrievers
            .insert(kind.name().to_string(), RetrieverReport { runs, mean });
    }

    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.run_dir.join("report.json"));
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;

    let ks: Vec<String> = (1..=settings.max_k).map(crate::evaluation::report::em_key).collect();
    writeln!(out, "{:<12} {}  smatch_f", "retriever", ks.iter().map(|k| format!("{k:>6}")).collect::<String>())
        .map_err(io_out)?;
    for (name, r) in &report.retrievers {
        let ems: String = ks.iter().map(|k| format!("{:>6.3}", r.mean.em[k])).collect();
        writeln!(out, "{name:<12} {ems}  {:.3}", r.mean.smatch.f).map_err(io_out)?;
    }
    writeln!(out, "report written to {}", path.display()).map_err(io_out)
}
