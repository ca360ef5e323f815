use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cape_core::checkpoint::{self, Alpha, Checkpoint};
use cape_core::corpus::{self, CorpusConfig, Vocabulary};
use cape_core::harness::{self, AlphaGrid, DecodeOptions, PipelineConfig};
use cape_core::metrics::{self, ScoreMode, ScoreReport};
use cape_core::model::{self, ModelParams, Strategy, TrainConfig};
use cape_core::selection::{self, SelectionMetric, SelectionThresholds};
use cape_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cape",
    version,
    about = "Contrastive parameter ensembling on a synthetic summarization task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Synthetic,
    Natural,
}

impl From<ModeArg> for ScoreMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Synthetic => ScoreMode::Synthetic,
            ModeArg::Natural => ScoreMode::Natural,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Ep,
    Dae,
}

impl From<MetricArg> for SelectionMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Ep => SelectionMetric::EntityPrecision,
            MetricArg::Dae => SelectionMetric::Dae,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MergeArg {
    Cape,
    Wiseft,
    Average,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus and write it as <out>/corpus.{train,valid,test}.
    GenerateCorpus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generated summaries against a corpus.
    Score {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        summaries: PathBuf,
        #[arg(long, value_enum, default_value = "synthetic")]
        mode: ModeArg,
        /// JSON report; a one-row CSV is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a scored corpus into clean and noisy subsets.
    Select {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        metric: MetricArg,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from scratch.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Vocabulary sizes as ENTITIES,PREDICATES,FILLERS. Inferred from
        /// the corpus when omitted.
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training an existing checkpoint.
    Finetune {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine checkpoints in weight space.
    Merge {
        #[arg(long, value_enum)]
        strategy: MergeArg,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        expert: Option<PathBuf>,
        #[arg(long)]
        anti: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Extra checkpoints for `average`.
        #[arg(long, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate summaries for every example in a corpus.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "greedy")]
        strategy: String,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score CaPE merges across a grid of alphas and pick one.
    Sweep {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        expert: PathBuf,
        #[arg(long)]
        anti: PathBuf,
        #[arg(long, default_value = "0.2:1.0:0.2")]
        grid: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "greedy")]
        strategy: String,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[arg(long, default_value_t = 0.01)]
        constraint_drop: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline without the mode comparison.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline, then compare merge modes and baselines.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    checkpoint::save(ck, path)
}

fn parse_vocab(s: &str) -> Result<Vocabulary> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad vocabulary sizes {s:?}")))?;
    match parts[..] {
        [e, p, f] => Ok(Vocabulary::new(e, p, f)),
        _ => Err(Error::InvalidArgument(format!(
            "expected ENTITIES,PREDICATES,FILLERS, got {s:?}"
        ))),
    }
}

fn required<'a>(arg: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    arg.as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("--{name} is required for this strategy")))
}

fn required_alpha(alpha: Option<f64>) -> Result<Alpha> {
    Alpha::new(
        alpha.ok_or_else(|| {
            Error::InvalidArgument("--alpha is required for this strategy".into())
        })?,
    )
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenerateCorpus { config, out } => {
            let cfg = CorpusConfig::from_json_file(&config)?;
            let splits = corpus::split(corpus::generate(&cfg)?);
            for path in corpus::write_splits(&out, "corpus", &splits)? {
                println!("{}", path.display());
            }
        }
        Command::Score {
            corpus,
            summaries,
            mode,
            out,
        } => {
            let examples = corpus::read_jsonl(&corpus)?;
            let generated = metrics::read_summaries(&summaries)?;
            let report = metrics::score_corpus(&examples, &generated, mode.into())?;
            write_text(&out, &(report.to_json() + "\n"))?;
            write_text(&out.with_extension("csv"), &report.to_csv())?;
            print!("{}", report.to_csv());
        }
        Command::Select {
            scores,
            corpus,
            metric,
            thresholds,
            out,
        } => {
            let report = ScoreReport::from_json_file(&scores)?;
            let examples = corpus::read_jsonl(&corpus)?;
            let ids: std::collections::BTreeSet<&str> =
                examples.iter().map(|e| e.id.as_str()).collect();
            if let Some(missing) = report
                .examples
                .iter()
                .find(|s| !ids.contains(s.id.as_str()))
            {
                return Err(Error::InvalidArgument(format!(
                    "scored example {:?} is not in the corpus",
                    missing.id
                )));
            }
            let t = match thresholds {
                Some(path) => SelectionThresholds::from_json_file(&path)?,
                None => SelectionThresholds::default(),
            };
            let res = selection::select(&report, metric.into(), &t)?;
            harness::write_selection(&out, &examples, &res)?;
            println!("clean {} noisy {}", res.clean_size, res.noisy_size);
        }
        Command::Train {
            corpus,
            config,
            vocab,
            out,
        } => {
            let cfg = TrainConfig::from_json_file(&config)?;
            let examples = corpus::read_jsonl(&corpus)?;
            let vocab = match vocab {
                Some(s) => parse_vocab(&s)?,
                None => Vocabulary::infer(&examples)?,
            };
            let (params, log) = model::train(vocab, &examples, &cfg)?;
            save(&params.to_checkpoint(), &out)?;
            for (epoch, loss) in log.epoch_loss.iter().enumerate() {
                println!("epoch {epoch} loss {loss:.6}");
            }
        }
        Command::Finetune {
            init,
            corpus,
            config,
            out,
        } => {
            let cfg = TrainConfig::from_json_file(&config)?;
            let start = ModelParams::from_checkpoint(&checkpoint::load(&init)?)?;
            let examples = corpus::read_jsonl(&corpus)?;
            let (params, log) = model::finetune(&start, &examples, &cfg)?;
            save(&params.to_checkpoint(), &out)?;
            for (epoch, loss) in log.epoch_loss.iter().enumerate() {
                println!("epoch {epoch} loss {loss:.6}");
            }
        }
        Command::Merge {
            strategy,
            base,
            expert,
            anti,
            alpha,
            inputs,
            out,
        } => {
            let merged = match strategy {
                MergeArg::Cape => checkpoint::cape_merge(
                    &checkpoint::load(required(&base, "base")?)?,
                    &checkpoint::load(required(&expert, "expert")?)?,
                    &checkpoint::load(required(&anti, "anti")?)?,
                    required_alpha(alpha)?,
                )?,
                MergeArg::Wiseft => checkpoint::wise_ft_merge(
                    &checkpoint::load(required(&base, "base")?)?,
                    &checkpoint::load(required(&expert, "expert")?)?,
                    required_alpha(alpha)?,
                )?,
                MergeArg::Average => {
                    let loaded = base
                        .iter()
                        .chain(expert.iter())
                        .chain(inputs.iter())
                        .map(|p| checkpoint::load(p))
                        .collect::<Result<Vec<_>>>()?;
                    let refs: Vec<&Checkpoint> = loaded.iter().collect();
                    checkpoint::average_merge(&refs)?
                }
            };
            save(&merged, &out)?;
        }
        Command::Decode {
            model,
            corpus,
            strategy,
            max_len,
            out,
        } => {
            let params = ModelParams::from_checkpoint(&checkpoint::load(&model)?)?;
            let examples = corpus::read_jsonl(&corpus)?;
            let opts = DecodeOptions {
                strategy: strategy.parse::<Strategy>()?,
                max_len,
            };
            let generated = harness::decode_corpus(&params, &examples, &opts)?;
            metrics::write_summaries(&out, &generated)?;
        }
        Command::Sweep {
            base,
            expert,
            anti,
            grid,
            corpus,
            strategy,
            max_len,
            constraint_drop,
            out,
        } => {
            if !(0.0..=1.0).contains(&constraint_drop) {
                return Err(Error::InvalidArgument(
                    "--constraint-drop must lie in [0, 1]".into(),
                ));
            }
            let grid: AlphaGrid = grid.parse()?;
            let opts = DecodeOptions {
                strategy: strategy.parse()?,
                max_len,
            };
            let (base, expert, anti) = (
                checkpoint::load(&base)?,
                checkpoint::load(&expert)?,
                checkpoint::load(&anti)?,
            );
            let examples = corpus::read_jsonl(&corpus)?;
            let sweep =
                harness::sweep_alpha(&base, &expert, &anti, &grid.values(), &examples, &opts)?;
            let chosen = harness::select_alpha(&sweep, constraint_drop)?;
            let _lock = harness::DirLock::acquire(&out)?;
            harness::emit_report(&sweep, &out, "sweep")?;
            write_text(
                &out.join("alpha.json"),
                &(serde_json::to_string_pretty(&chosen).expect("selection serializes") + "\n"),
            )?;
            print!("{}", harness::sweep_csv(&sweep));
            println!(
                "selected alpha {}{}",
                chosen.alpha,
                if chosen.fallback { " (fallback)" } else { "" }
            );
        }
        Command::Run { config, out } => {
            let cfg = PipelineConfig::from_json_file(&config)?;
            let summary = harness::run_pipeline(&cfg, &out)?;
            for p in &summary.pairings {
                println!("{} alpha {}", p.pairing.label(), p.selection.alpha);
            }
        }
        Command::Compare { config, out } => {
            let cfg = PipelineConfig::from_json_file(&config)?;
            let (_, comparison) = harness::run_compare(&cfg, &out)?;
            print!("{}", comparison.to_csv());
            for w in &comparison.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
