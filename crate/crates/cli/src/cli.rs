use std::io::Write;
use std::path::PathBuf;

use artqa_core::datasets::sample::write_sample;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{Overrides, Settings};
use crate::error::{CliError, CliResult};
use crate::runner::{self, Module, SourceFormat};
use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "artqa", version, about = "Answer visual and contextual questions about artworks")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Canonical dataset directory (default: config, then $ARTQA_DATA_DIR, then ./data).
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Output location for commands that write files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalTarget {
    Classifier,
    Qa,
    Vqa,
    Pipeline,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a source dataset into canonical files (written to --out, else the data dir).
    Import {
        #[arg(long, value_enum)]
        format: SourceFormat,
        input: PathBuf,
    },
    /// Extract grid region features for every artwork image.
    Features,
    /// Train one module and write its checkpoint and history.
    Train {
        #[arg(value_enum)]
        module: Module,
    },
    /// Evaluate on the test split and write reports.
    Eval {
        #[arg(value_enum)]
        target: EvalTarget,
        /// Pipeline only: simulate stub branches instead of loading models.
        /// Takes an optional TOML spec; defaults to the reference accuracies.
        #[arg(long, num_args = 0..=1)]
        stub: Option<Option<PathBuf>>,
        /// Simulated questions per type for --stub.
        #[arg(long, default_value_t = 5000)]
        questions: usize,
    },
    /// Answer one question about one artwork.
    Ask {
        #[arg(long)]
        artwork: String,
        question: String,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Write the bundled synthetic sample in Artpedia layout (to --out, else ./data/sample).
    Sample,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            seed: self.seed,
            data_dir: self.data_dir.clone(),
            checkpoint_dir: self.checkpoint_dir.clone(),
            out: self.out.clone(),
        }
    }
}

/// Writes to stdout, ignoring a closed pipe (`artqa ... | head`).
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json<T: serde::Serialize>(v: &T) {
    emit(&(serde_json::to_string_pretty(v).expect("serializable output") + "\n"));
}

pub fn run(cli: Cli) -> CliResult<()> {
    let s = Settings::resolve(&cli.overrides())?;
    match cli.command {
        Command::Import { format, input } => {
            let out = s.out.clone().unwrap_or_else(|| s.data_dir.clone());
            print_json(&runner::import(format, &input, &out)?);
        }
        Command::Features => {
            let (written, skipped) = runner::features(&s)?;
            emit(&format!(
                "wrote {written} region files to {} ({skipped} artworks without images)\n",
                s.features_dir.display()
            ));
        }
        Command::Train { module } => print_json(&runner::train(&s, module)?),
        Command::Eval { target, stub, questions } => {
            if stub.is_some() && target != EvalTarget::Pipeline {
                return Err(CliError::Usage("--stub applies to `eval pipeline` only".into()));
            }
            let table = match (target, stub) {
                (EvalTarget::Pipeline, Some(spec)) => runner::eval_stub(&s, spec.as_deref(), questions)?.table,
                (EvalTarget::Pipeline, None) => runner::eval_pipeline(&s)?.table,
                (EvalTarget::Classifier, _) => runner::eval_classifier(&s)?.table,
                (EvalTarget::Qa, _) => runner::eval_branch(&s, Module::Qa)?.table,
                (EvalTarget::Vqa, _) => runner::eval_branch(&s, Module::Vqa)?.table,
            };
            emit(&format!("{table}fingerprint {} seed {}\n", s.fingerprint(), s.seed()?));
        }
        Command::Ask { artwork, question } => print_json(&runner::ask(&s, &artwork, &question)?),
        Command::Serve { bind } => {
            let addr = bind.unwrap_or_else(|| s.config.service.bind.clone());
            service::serve(AppState::load(&s)?, &addr)?;
        }
        Command::Sample => {
            let seed = s.seed()?;
            let out = s.out.clone().unwrap_or_else(|| PathBuf::from("data/sample"));
            let n = write_sample(&out, seed)?;
            emit(&format!("wrote {n} artworks to {}\n", out.display()));
        }
    }
    Ok(())
}
