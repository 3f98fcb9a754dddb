use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use dgn_core::corpus::{load_corpus, write_corpus};
use dgn_harness::checkpoint;
use dgn_harness::config::ExperimentConfig;
use dgn_harness::data::{load_graphs, Dataset};
use dgn_harness::gradsuite::{run_grad_suite, GRAD_TOLERANCE};
use dgn_harness::model::Model;
use dgn_harness::train::{evaluate, train, LossWeights};
use dgn_harness::wltest::wl_report;

#[derive(Parser)]
#[command(name = "dgn", version, about = "Train and test deep graph networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv, summary.json and model.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the config's data; writes eval.json.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite; fails if any check exceeds tolerance.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report graph pairs that WL refinement cannot distinguish.
    Wltest {
        /// JSON-lines corpus; otherwise graphs come from --config.
        #[arg(long, conflicts_with = "config")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the config's graphs as a JSON-lines corpus.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn write_json<T: serde::Serialize>(dir: &Path, file: &str, value: &T) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(dir.join(file), text)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    dgn_harness::init_threads()?;
    match cli.command {
        Command::Train { config, seed, out } => {
            let config = load_config(&config, seed)?;
            let (_, trained) = train(&config)?;
            trained.metrics.write(&out)?;
            checkpoint::save(&out.join("model.ckpt"), &trained.model.store)?;
            for (split, e) in &trained.metrics.summary.final_eval {
                println!("{split}: loss {:.6} {} {:.4}", e.loss, trained.metrics.summary.metric, e.metric);
            }
            eprintln!("wall time {:.2}s", trained.metrics.wall_time);
        }
        Command::Eval {
            config,
            checkpoint: ckpt,
            seed,
            out,
        } => {
            let config = load_config(&config, seed)?;
            let data = Dataset::build(&config)?;
            let mut model = Model::new(&config, &data)?;
            checkpoint::load(&ckpt, &mut model.store)?;
            let result = evaluate(&model, &data, LossWeights::from_config(&config))?;
            for (split, e) in &result {
                println!("{split}: loss {:.6} metric {:.4}", e.loss, e.metric);
            }
            write_json(&out, "eval.json", &result)?;
        }
        Command::Gradcheck { config, seed, out } => {
            let seed = match (seed, config) {
                (Some(s), _) => s,
                (None, Some(path)) => load_config(&path, None)?.seed,
                (None, None) => 0,
            };
            let entries = run_grad_suite(seed)?;
            let mut ok = true;
            let mut report = Vec::new();
            for e in &entries {
                let status = if e.passed() { "ok" } else { "FAIL" };
                ok &= e.passed();
                println!("{:<24} max_rel_err {:.3e}  {status}", e.name, e.report.max_rel_error);
                report.push(serde_json::json!({
                    "name": e.name,
                    "max_rel_error": e.report.max_rel_error,
                    "max_abs_error": e.report.max_abs_error,
                    "checked": e.report.checked,
                }));
            }
            let worst = entries.iter().map(|e| e.report.max_rel_error).fold(0.0, f64::max);
            println!("max relative error {worst:.3e} (tolerance {GRAD_TOLERANCE:e})");
            if let Some(dir) = out {
                write_json(&dir, "gradcheck.json", &report)?;
            }
            return Ok(ok);
        }
        Command::Wltest {
            corpus,
            config,
            seed,
            out,
        } => {
            let graphs = match (corpus, config) {
                (Some(path), _) => load_corpus(&path).with_context(|| format!("reading {}", path.display()))?,
                (None, Some(path)) => load_graphs(&load_config(&path, seed)?)?,
                (None, None) => bail!("wltest needs --corpus or --config"),
            };
            let report = wl_report(&graphs);
            for (i, j) in &report.indistinguishable {
                println!("indistinguishable: {i} {j}");
            }
            println!("{} indistinguishable pairs among {} graphs", report.indistinguishable.len(), report.num_graphs);
            if let Some(dir) = out {
                write_json(&dir, "wltest.json", &report)?;
            }
        }
        Command::Gen { config, seed, out } => {
            let config = load_config(&config, seed)?;
            let graphs = load_graphs(&config)?;
            std::fs::create_dir_all(&out)?;
            let file = std::fs::File::create(out.join("corpus.jsonl"))?;
            let mut w = std::io::BufWriter::new(file);
            write_corpus(&mut w, &graphs)?;
            std::io::Write::flush(&mut w)?;
            println!("wrote {} graphs", graphs.len());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
