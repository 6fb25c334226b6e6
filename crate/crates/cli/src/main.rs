use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auxst::config::ExperimentConfig;
use auxst::corpus::{parse_token_lines, write_tagged_tsv};
use auxst::gradcheck::run_gradcheck;
use auxst::harness::{run_experiment, run_root};
use auxst::model::read_model;
use auxst::synthetic::{generate, SyntheticConfig};
use auxst::{Error, Model64, OpKind, Result};
use clap::{Parser, Subcommand};

/// Multi-task bi-LSTM taggers with auxiliary-task self-training.
#[derive(Parser)]
#[command(name = "auxst", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every condition, size, seed and corpus of a config and write the
    /// reports. Run directories go under $AUXST_RUN_ROOT (default `runs`).
    Experiment { config: PathBuf },
    /// Tag one-token-per-line input with a saved model, printing
    /// `token<TAB>tag` lines.
    Tag {
        model: PathBuf,
        input: PathBuf,
        task: String,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one operator's gradient (negative control).
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
    /// Write a synthetic corpus set as tagged TSV files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        main_sentences: Option<usize>,
        #[arg(long)]
        aux_sentences: Option<usize>,
        #[arg(long)]
        test_sentences: Option<usize>,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn stdout_write(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        })
}

fn experiment(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let root = run_root();
    let out = run_experiment(&cfg, &root)?;
    eprintln!("run directories under {}", root.display());
    stdout_write(&out.report)
}

fn tag(model: &Path, input: &Path, task: &str) -> Result<()> {
    let model: Model64 = read_model(&read(model)?)?;
    model.task(task)?;
    let mut corpus = parse_token_lines(&read(input)?, "input")?;
    for s in corpus.sentences.iter_mut() {
        let tags = model.tag(s.tokens(), task)?;
        s.set_labels(task, tags)?;
    }
    stdout_write(&write_tagged_tsv(&corpus, task)?)
}

fn gradcheck(seed: u64, fault: Option<&str>) -> Result<bool> {
    let fault = fault
        .map(|name| {
            OpKind::ALL
                .into_iter()
                .find(|k| k.name() == name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown operator `{name}`")))
        })
        .transpose()?;
    let report = run_gradcheck(seed, fault)?;
    stdout_write(&report.to_string())?;
    Ok(report.passed())
}

fn synth(out: &Path, cfg: SyntheticConfig) -> Result<()> {
    generate(&cfg)?.write_dir(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Experiment { config } => experiment(&config),
        Command::Tag { model, input, task } => tag(&model, &input, &task),
        Command::Gradcheck { seed, fault } => match gradcheck(seed, fault.as_deref()) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("gradient check failed");
                return ExitCode::from(3);
            }
            Err(e) => Err(e),
        },
        Command::Synth {
            out,
            seed,
            main_sentences,
            aux_sentences,
            test_sentences,
        } => {
            let d = SyntheticConfig::default();
            synth(
                &out,
                SyntheticConfig {
                    seed,
                    main_sentences: main_sentences.unwrap_or(d.main_sentences),
                    aux_sentences: aux_sentences.unwrap_or(d.aux_sentences),
                    test_sentences: test_sentences.unwrap_or(d.test_sentences),
                    ..d
                },
            )
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
