use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use promptlearn::corpus::{label_distribution, write_dataset, LabelCatalog};
use promptlearn::runner::{
    evaluate_rows, load_predictions, render_grid_report, run_few_shot, run_grid, run_zero_shot, select_training,
    Experiment, ExperimentConfig, GridResults, ScoreCache, DEFAULT_SEED,
};
use promptlearn::synthetic::{generate, SyntheticSpec};
use promptlearn::Error;

#[derive(Parser)]
#[command(
    name = "promptlearn",
    version,
    about = "Prompt-learning text classification experiments"
)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed (default 144).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the stratified train/dev, validation and test split.
    Split,
    /// Select the few-shot training records.
    Sample,
    /// Render the evaluation records through every configured template.
    Render,
    /// Classify the evaluation split and write predictions and a report.
    Classify,
    /// Score a predictions file.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Evaluate every template/verbalizer pair plus their ensembles.
    Grid,
    /// Render a saved grid as a markdown table.
    Report {
        /// Grid results; defaults to `grid.json` in the output directory.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Write a synthetic clustered corpus and its embeddings.
    Synth {
        #[arg(long, default_value_t = 2100)]
        records: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already name their cause.
            match e.downcast_ref::<Error>() {
                Some(err) => eprintln!("error: {err}"),
                None => eprintln!("error: {e:#}"),
            }
            let usage = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::Config(_) | Error::UnknownId { .. })
            ) || e.downcast_ref::<Usage>().is_some();
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Usage("this command needs --config".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.sampling.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn out_dir(cli: &Cli) -> anyhow::Result<PathBuf> {
    match (&cli.out, &cli.config) {
        (Some(out), _) => Ok(out.clone()),
        (None, Some(_)) => Ok(load_config(cli)?.output_dir),
        (None, None) => Ok(PathBuf::from("out")),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Split => {
            let exp = Experiment::load(load_config(&cli)?)?;
            let split = exp.split()?;
            let out = &exp.config().output_dir;
            std::fs::create_dir_all(out)?;
            split.save(out.join("split.json"))?;
            println!(
                "train_dev {} / validation {} / test {}",
                split.train_dev.len(),
                split.validation.len(),
                split.test.len()
            );
        }
        Command::Sample => {
            let exp = Experiment::load(load_config(&cli)?)?;
            let selection = select_training(&exp)?;
            let body = serde_json::json!({
                "strategy": exp.config().sampling.strategy,
                "proportion": exp.config().sampling.proportion,
                "seed": exp.config().sampling.seed,
                "selected": selection.selected,
            });
            write_json(&exp.config().output_dir.join("selection.json"), &body)?;
            println!("selected {} records", selection.selected.len());
        }
        Command::Render => {
            let exp = Experiment::load(load_config(&cli)?)?;
            let mut prompts = Vec::new();
            for record in exp.eval_records()? {
                for t in &exp.config().templates {
                    prompts.push(exp.render(t, record)?);
                }
            }
            let out = &exp.config().output_dir;
            std::fs::create_dir_all(out)?;
            let mut body = String::new();
            for p in &prompts {
                body.push_str(&serde_json::to_string(p)?);
                body.push('\n');
            }
            std::fs::write(out.join("prompts.jsonl"), body)?;
            println!("rendered {} prompts", prompts.len());
        }
        Command::Classify => {
            let exp = Experiment::load(load_config(&cli)?)?;
            let out = exp.config().output_dir.clone();
            let outcome = if exp.config().is_few_shot() {
                run_few_shot(&exp, Some(&out))?
            } else {
                run_zero_shot(&exp, &open_cache(exp.config())?, Some(&out))?
            };
            println!(
                "accuracy {:.4}  macro-F1 {:.4}  ({} records, {} parse failures)",
                outcome.report.accuracy,
                outcome.report.macro_f1,
                outcome.report.n_samples,
                outcome.report.n_parse_failures
            );
        }
        Command::Eval { predictions } => {
            let n_labels = match &cli.config {
                Some(_) => {
                    let config = load_config(&cli)?;
                    match &config.catalog {
                        Some(path) => LabelCatalog::load(path)?.len(),
                        None => LabelCatalog::retail_default().len(),
                    }
                }
                None => LabelCatalog::retail_default().len(),
            };
            let report = evaluate_rows(&load_predictions(predictions)?, n_labels)?;
            let out = out_dir(&cli)?;
            std::fs::create_dir_all(&out)?;
            report.save(out.join("report.json"))?;
            println!("accuracy {:.4}  macro-F1 {:.4}", report.accuracy, report.macro_f1);
        }
        Command::Grid => {
            let exp = Experiment::load(load_config(&cli)?)?;
            let out = exp.config().output_dir.clone();
            let results = run_grid(&exp, &open_cache(exp.config())?, Some(&out))?;
            print!("{}", render_grid_report(&results).markdown);
        }
        Command::Report { grid } => {
            let out = out_dir(&cli)?;
            let path = grid.clone().unwrap_or_else(|| out.join("grid.json"));
            let report = render_grid_report(&GridResults::load(&path)?);
            for w in &report.warnings {
                log::warn!("{w}");
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("grid.md"), &report.markdown)?;
            print!("{}", report.markdown);
        }
        Command::Synth { records } => {
            let out = out_dir(&cli)?;
            std::fs::create_dir_all(&out)?;
            let spec = SyntheticSpec::retail(*records, cli.seed.unwrap_or(DEFAULT_SEED));
            let corpus = generate(&spec, &LabelCatalog::retail_default())?;
            write_dataset(out.join("dataset.jsonl"), &corpus.dataset)?;
            corpus.embeddings.save(out.join("embeddings.jsonl"))?;
            println!(
                "wrote {} records, label counts {:?}",
                corpus.dataset.len(),
                label_distribution(&corpus.dataset)
            );
        }
    }
    Ok(())
}

fn open_cache(config: &ExperimentConfig) -> anyhow::Result<ScoreCache> {
    Ok(match &config.cache_dir {
        Some(dir) => ScoreCache::open(dir)?,
        None => ScoreCache::in_memory(),
    })
}
